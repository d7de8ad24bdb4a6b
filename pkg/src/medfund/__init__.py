"""Medical-crowdfunding log analytics and early donation prediction."""

__version__ = "0.1.0"
