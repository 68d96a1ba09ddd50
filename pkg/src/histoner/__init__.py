"""Toolkit for historical multilingual NER: OCR corpus filtering, wordpiece
vocabularies, masked-LM pretraining data, NER dataset parsing, strict/fuzzy
scoring, attribute-aided evaluation and a fine-tuning harness."""

__version__ = "0.1.0"
