"""Desk-scale text-to-video laboratory.

Pipeline: curate clips -> train a latent-diffusion teacher -> prune it
structurally -> consistency-distill the student -> reward fine-tune ->
sample, evaluate and benchmark. Every stage is deterministic given its
seeds and small enough to verify with brute-force oracles.
"""

__version__ = "0.1.0"
