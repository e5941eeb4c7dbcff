"""Pipeline engine for markerless human-movement analysis of videos:
a dependency-checked relational data model, exactly-once populate across
concurrent workers, pluggable pose-estimation stages behind a process
adapter protocol, and privacy-preserving visualization."""

__version__ = "0.1.0"
