# Agents package initialization
