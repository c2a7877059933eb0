"""
HTTP routers: metrics and inference
"""
