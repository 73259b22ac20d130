"""Dialogue question answering: staged pre-training, fine-tuning, evaluation."""

from ._dialqa import *  # noqa: F401,F403
from ._dialqa import __version__  # noqa: F401
