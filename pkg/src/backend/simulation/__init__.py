"""Wave solver, potentials, oracles and snapshot dumps"""
