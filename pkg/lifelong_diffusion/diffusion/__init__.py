"""
Toy latent diffusion backbone: schedule, text conditioning, denoiser, sampler
"""
