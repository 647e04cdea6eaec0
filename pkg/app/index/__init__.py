# Index package initialization
