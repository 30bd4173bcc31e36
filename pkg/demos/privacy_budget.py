"""
Privacy budget of repeated Gaussian steps
=========================================

Renyi accounting over a fixed grid of orders, without subsampling
amplification, so the numbers are conservative.
"""

from groupclip import PrivacyLedger, calibrate_sigma, compose_and_convert

for sigma in (0.8, 1.0, 2.0, 4.0):
    eps = compose_and_convert(PrivacyLedger(sigma, steps=100, delta=1e-5))
    print(f"sigma={sigma:<4} 100 steps -> epsilon {eps:8.3f}")

for target in (2.0, 3.0, 8.0):
    sigma = calibrate_sigma(target, delta=1e-5, steps=1000)
    check = compose_and_convert(PrivacyLedger(sigma, 1000, 1e-5))
    print(f"epsilon {target} over 1000 steps needs sigma {sigma:.4f} (gives {check:.4f})")
