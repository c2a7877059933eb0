"""
Network Package
Layers, diffusion, hypothesis heads and the assembled pose/shape model
"""
