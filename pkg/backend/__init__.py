# Backend engines of the annulus lab: enumeration, kernels, peeling, CSBP, laws and checks
