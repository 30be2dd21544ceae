from hyperlab.database.results_store import ResultStore

__all__ = ["ResultStore"]
