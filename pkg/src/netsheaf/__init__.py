"""Network sheaves over sampled manifolds.

Discretizes signal processing on vector bundles into cellular-sheaf form:
base points are sampled from a manifold (symmetric positive-definite
covariances, or the circle), node stalks carry finite-dimensional fiber
coordinates, and edges carry orthogonal transport maps. The package
provides the closed-form Otto-Wasserstein geometry used to construct
ground-truth transports, the block sheaf Laplacian, three orthogonal
transport hypothesis classes with closed-form projections, polynomial
sheaf filter networks, bottom-of-spectrum stability metrics, and a
circle harness that checks Laplacian convergence at desk scale.
"""

__version__ = "0.1.0"

from .spd import (
    CholeskyFrame,
    bures_wasserstein_distance,
    cholesky_frame,
    cholesky_rescale,
    christoffel,
    lyapunov_solve,
    optimal_transport_map,
    otto_inner,
    parallel_transport,
    sample_spd,
    sym_basis,
    sym_dim,
    sym_unvec,
    sym_vec,
    wasserstein_geodesic,
)
from .sheaf import (
    BlockSheafLaplacian,
    Cochain,
    SheafGraph,
    apply_laplacian,
    assemble_laplacian,
    bandwidth_schedule,
    build_complete_graph,
    build_knn_graph,
    load_laplacian,
    load_sheaf,
    pairwise_bures_distance,
    point_cloud_extension,
    rescaled_edge_transports,
    save_laplacian,
    save_sheaf,
    scalar_graph_laplacian,
    spd_knn_graph,
)
from .transport import (
    CirculantTransport,
    FitResult,
    HouseholderTransport,
    TransportClass,
    circulant_materialize,
    fit_transports,
    householder_materialize,
    per_edge_plateau,
    plateau_circulant,
    plateau_frozen,
    project_circulant,
    project_orthogonal,
    write_fit_csv,
)
from .filters import (
    FilterSpec,
    MultiChannelCochain,
    forward,
    load_filter_spec,
    polynomial_filter,
    random_filter_spec,
    save_filter_spec,
    transfer_disagreement,
    write_output_csv,
)
from .spectral import (
    SpectralReport,
    bottom_k_eigenvalues,
    spec_l2,
    spec_rel_max,
    spectral_report,
    write_sweep_csv,
)
from .circle import (
    SECTIONS,
    CircleSample,
    ConvergenceRow,
    GaussianOracleReport,
    arc_distance,
    circle_convergence_row,
    gaussian_identity_oracle,
    rescaled_point_cloud_laplacian_circle,
    sample_circle,
)
