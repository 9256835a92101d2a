"""Risk prediction backed by inferred hemodynamic concept evidence.

A probabilistic model ties a binary outcome to latent hemodynamic concepts
(R, C, Ts, Td, CO) through a two-element Windkessel forward model.  The
package fits that model by variational EM, trains a network that outputs MAP
estimates of risk and concepts, and evaluates the whole pipeline on synthetic
cohorts drawn from the generative model itself.
"""

__version__ = "0.1.0"
