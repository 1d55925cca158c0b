"""Encoder-decoder fusion network written directly in numpy."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import EDConfig, EDNetwork, build
from .optim import RMSprop, rmsprop_step
from .train import Schedule, evaluate, recalibrate_batchnorm, train
