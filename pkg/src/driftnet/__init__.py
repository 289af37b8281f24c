"""Device-type inference from bidirectional flow records under concept drift.

The package is organized around six layers:

* :mod:`driftnet.flow` -- flow data model, protocol classes, feature
  extraction, and the on-disk flow CSV format.
* :mod:`driftnet.forest` -- a from-scratch decision-forest classifier with
  per-class acceptance thresholds and macro-accuracy metrics.
* :mod:`driftnet.strategies` -- global / contextualized / combined-pool /
  dynamic-window inference strategies and model selectors.
* :mod:`driftnet.synth` -- seeded synthetic multi-home dataset generator
  with tunable spatial context variation and scheduled drift events.
* :mod:`driftnet.harness` -- experiment protocol: temporal decay, spatial
  matrices, multi-run strategy comparisons, and CSV reports.
* :mod:`driftnet.cli` -- file-based pipeline (generate, train, evaluate,
  report, selftest) with manifest-driven reproducibility.
"""

__version__ = "0.1.0"

FLOW_CSV_FORMAT_VERSION = 1
MODEL_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1
