"""Privacy-preserving peer-to-peer social learning: protocols and simulator."""

from .crypto_core import IntegrityError, KeyPair, PublicKey, Signature, generate_keypair
from .metadata import Role, UserId
from .simnet import SimConfig, SimWorld

__all__ = ["IntegrityError", "KeyPair", "PublicKey", "Signature", "generate_keypair", "Role", "UserId",
           "SimConfig", "SimWorld"]
__version__ = "0.1.0"
