"""Bug-severity prediction toolkit.

Parses Bugzilla-style bug-report CSVs, builds TF-IDF + metadata features,
corrects class imbalance, trains nine from-scratch classifiers, and
benchmarks them under a shared split/fold plan.
"""

from bugsev.corpus import BugReport, Corpus, Severity

__version__ = "0.1.0"

__all__ = ["BugReport", "Corpus", "Severity", "__version__"]
