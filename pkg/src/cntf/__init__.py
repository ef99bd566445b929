"""Knowledge-grounded dialogue generation with commonsense and named-entity
triples, multi-hop memory attention, and a gated copy decoder."""

__version__ = "0.1.0"
