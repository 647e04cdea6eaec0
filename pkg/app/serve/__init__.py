# Serve package initialization
