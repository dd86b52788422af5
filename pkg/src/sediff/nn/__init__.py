"""Hand-written neural-network primitives (numpy plus optional compiled kernels)."""
