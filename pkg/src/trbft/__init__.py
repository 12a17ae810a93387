"""Two-tier BFT: USIG-backed agreement among group leaders over hardened Raft groups."""

__version__ = "0.1.0"
