from .metrics import bleu, rouge_l, cider, lcs_length, ngram_counts
from .report import MetricReport, evaluate_corpus
