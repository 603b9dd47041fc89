"""Streaming spatial QA benchmark engine.

Plans camera trajectories through indoor scene metadata, computes per-frame
object visibility, generates temporally grounded QA pairs and exploration
episodes, and scores answering models under a bounded-memory streaming
protocol.
"""

__version__ = "0.1.0"
