"""Relationship-aware kernel regression, relational attention and CATE meta-learners."""

__version__ = "0.1.0"
