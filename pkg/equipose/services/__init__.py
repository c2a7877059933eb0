"""
Services: synthetic data, training, inference, evaluation, reports, gradient checking and the self-test suite
"""
