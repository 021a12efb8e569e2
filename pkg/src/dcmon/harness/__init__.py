"""Reproducible experiment driver: trace replay, synthetic stream
generation, failure injection with derivable ground truth, a brute-force
matching oracle, and latency/bandwidth benchmarks including the
pull-polling baseline."""
