"""External embedding bridge: a CLAP-style audio encoder behind a stdio protocol."""

from .model import ARCHS, LAYER_DIMS, MODEL_SAMPLE_RATE, AudioEncoder, init_checkpoint, \
    load_checkpoint
from .server import BridgeConfig, selftest, serve

__version__ = "0.1.0"
