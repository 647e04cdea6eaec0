# Corpus package initialization
