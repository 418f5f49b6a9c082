"""Concentric-ball toy registration in 3D (several minutes on one core)."""
from toy_2d import main

if __name__ == "__main__":
    main(3, {"lam": 1 / 8.3, "target_lam": 1 / 6, "iters": 15})
