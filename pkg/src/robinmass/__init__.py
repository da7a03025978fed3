"""Robin masses, spectral zeta values and determinant ratios on flat tori and spheres.

Submodules: special_fn, geometry, spectral, green, scattering, ricci, verify, cli.  The
package namespace stays import-light so the CLI can configure threading first.
"""
__version__ = "0.1.0"
