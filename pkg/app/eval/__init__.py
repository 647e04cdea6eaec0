# Eval package initialization
