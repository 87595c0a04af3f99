"""
Synthetic concepts, task datasets and prior-preservation sets
"""
