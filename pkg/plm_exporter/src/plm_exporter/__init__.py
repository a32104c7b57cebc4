from .export import ExportError, ExportSpec, export_embeddings, write_embedding_file

__all__ = ["ExportError", "ExportSpec", "export_embeddings", "write_embedding_file"]
