"""
Storage Package
Point clouds, checkpoints and datasets on local disk, written atomically
"""
