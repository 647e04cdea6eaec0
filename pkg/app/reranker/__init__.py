# Reranker package initialization
