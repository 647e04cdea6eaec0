# IUM package initialization
