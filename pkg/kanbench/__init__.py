"""kanbench - Kolmogorov-Arnold Network benchmarking toolkit"""

__version__ = "0.1.0"
