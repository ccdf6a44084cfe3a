"""Steady states of the Townsend gas-discharge model: sparking voltages,
linear analysis at bifurcation points and branch continuation."""
