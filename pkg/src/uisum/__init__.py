"""Mobile UI screen summarization: corpus tools, a multimodal
encoder-decoder, retrieval baselines and captioning metrics."""

from .corpus import Corpus, Screen, UiElement, UiTree, load_corpus, parse_view_hierarchy, strip_stop_phrases
from .errors import ConfigError, DataError, NumericFault, UisumError
from .model import ModelConfig, ScreenSummarizer

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Corpus",
    "DataError",
    "ModelConfig",
    "NumericFault",
    "Screen",
    "ScreenSummarizer",
    "UiElement",
    "UiTree",
    "UisumError",
    "load_corpus",
    "parse_view_hierarchy",
    "strip_stop_phrases",
]
