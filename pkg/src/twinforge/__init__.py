"""twinforge: a self-contained digital-twin platform.

Twin/type registry with hierarchy constraints, device gateway with payload
mapping, durable pub-sub bus, time-series persistence with provenance tags,
interval-learning sensor-failure watchdog, streaming prediction bridges, and
a benchmark/fault-injection harness.
"""

__version__ = "0.1.0"
