"""Backend: grids, wave solver, measurement operators, control, optics, reconstruction and reporting"""
