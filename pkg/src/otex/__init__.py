"""Opinion target extraction with word-level and character-enhanced BiGRU taggers."""

from .data import Corpus, Sentence, Vocab, build_vocab, parse_semeval_xml, read_corpus, tokenize
from .evaluation import PRF, SubsetSpec, evaluate, exact_match_prf
from .layers import CHAR_WORD, WORD_ONLY, Model, ModelConfig
from .training import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "CHAR_WORD", "WORD_ONLY", "Corpus", "Model", "ModelConfig", "PRF", "Sentence", "SubsetSpec",
    "TrainConfig", "TrainReport", "Vocab", "build_vocab", "evaluate", "exact_match_prf",
    "parse_semeval_xml", "read_corpus", "tokenize", "train",
]
