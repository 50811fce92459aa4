conf: dict = {}
debug: bool = False
__version__ = "1.0.0"

import rtcnet.toolbox
import rtcnet.structure
import rtcnet.config
import rtcnet.logger
import rtcnet.tensor
import rtcnet.network
import rtcnet.trainer
import rtcnet.augment
import rtcnet.datasets
import rtcnet.metrics
import rtcnet.command

conf = dict(rtcnet.config.DEFAULT_CONFIG)
