"""SVJ Quant - quantization pricing for the Stochastic Volatility Jacobi model"""

__version__ = "1.0.0"
__description__ = "Polynomial and recursive marginal quantization of SVJ log-prices with Monte Carlo oracles"

__all__ = [
    "__version__",
    "__description__",
]
