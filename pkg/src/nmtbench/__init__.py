"""nmtbench: a desk-scale neural machine translation workbench.

Everything is implemented from first principles on top of numpy: corpus
splitting, BPE/unigram subword models, a reverse-mode autodiff tensor,
Transformer and recurrent seq2seq models, beam/ensemble decoding, training
with live event logging, MT metrics, and an energy/carbon report.
"""

__version__ = "0.1.0"
