"""Fine-grained mixed-precision quantization toolkit.

Blocks of 16 elements along the reduction dimension are independently
stored as NVFP4 (E2M1 elements with an E4M3 per-block scale) or FP8
(E4M3 elements with a per-tensor scale), selected by sensitivity-weighted
impact scores against a calibrated percentile threshold. Includes a
bit-exact mixed-precision dot-product datapath model and a memory/energy
cost model.
"""

__version__ = "0.1.0"
