from hyperlab.services.coulomb_service import CoulombService
from hyperlab.services.report_service import ReportService
from hyperlab.services.spectral_service import SpectralService
from hyperlab.services.transport_service import TransportService
from hyperlab.services.variance_service import VarianceService

__all__ = ["CoulombService", "ReportService", "SpectralService", "TransportService", "VarianceService"]
