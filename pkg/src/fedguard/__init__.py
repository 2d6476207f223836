"""Backend-agnostic safety loop for federated computing jobs.

The package simulates a federation of Nodes plus a central Aggregator running
mock privacy back-ends (FHE noise budget, DP privacy accountant, MPC share
verification) underneath a control plane that senses signed telemetry,
forecasts risk, dispatches signed control commands, and proves compliance in
an append-only Merkle ledger.
"""

__version__ = "0.1.0"
