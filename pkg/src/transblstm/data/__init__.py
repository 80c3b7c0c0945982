from .corpus import (
    BigramOracle,
    Corpus,
    Sentence,
    SyntheticCorpus,
    SyntheticSpec,
    TokenizedCorpus,
    gen_synthetic_corpus,
)
from .pretrain import (
    IS_NEXT,
    NOT_NEXT,
    Batch,
    ExampleStream,
    PretrainExample,
    SentencePair,
    format_pair,
    make_batch,
    make_pretrain_example,
    read_examples,
    sample_sentence_pair,
    truncate_example,
    whole_word_mask,
    write_examples,
)
from .tasks import TaskBatch, make_classification_task, make_span_task
from .vocab import SPECIAL_TOKENS, Vocab, build_vocab, tokenize, wordpiece

__all__ = [
    "IS_NEXT",
    "NOT_NEXT",
    "SPECIAL_TOKENS",
    "Batch",
    "BigramOracle",
    "Corpus",
    "ExampleStream",
    "PretrainExample",
    "Sentence",
    "SentencePair",
    "SyntheticCorpus",
    "SyntheticSpec",
    "TaskBatch",
    "TokenizedCorpus",
    "Vocab",
    "build_vocab",
    "format_pair",
    "gen_synthetic_corpus",
    "make_batch",
    "make_classification_task",
    "make_pretrain_example",
    "make_span_task",
    "read_examples",
    "sample_sentence_pair",
    "tokenize",
    "truncate_example",
    "whole_word_mask",
    "wordpiece",
    "write_examples",
]
