"""Fractional Sobolev norms and extension operators on Lipschitz simplicial manifolds."""
