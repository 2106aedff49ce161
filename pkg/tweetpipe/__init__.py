__version__ = "0.1.0"
__all__ = ["broker", "dataset", "streaming", "classifier", "store", "workload", "metrics", "query"]
