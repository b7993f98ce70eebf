from pydantic import BaseModel, ConfigDict, Field
from typing import Any, List, Literal, Optional, Union


class JumpSpec(BaseModel):
    """One jump atom of the Lévy measure"""
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    u: List[float] = Field(..., description="Jump size vector")
    lambda_: float = Field(..., alias="lambda", description="Intensity per unit time")


class ModelSpec(BaseModel):
    """Schema for the market model document"""
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(..., description="Number of risky assets")
    drift: List[float] = Field(..., description="Drift vector b^S (truncation h(x)=x)")
    diffusion: List[List[float]] = Field(..., description="Diffusion matrix c^S")
    jumps: List[JumpSpec] = Field(default_factory=list, description="Finite jump atoms")
    horizon: float = Field(..., description="Time horizon T")


ConeType = Literal["orthant", "full", "zero", "ray", "span", "polyhedral", "product"]


class ConeSpec(BaseModel):
    """Schema for a constant constraint cone"""
    model_config = ConfigDict(extra="forbid")

    type: ConeType = Field(..., description="Cone variant")
    data: Any = Field(None, description="Dimension, direction, basis, generators or sub-cones")


class OptionsSpec(BaseModel):
    """Numeric options; unset fields fall back to flags and then settings"""
    model_config = ConfigDict(extra="forbid")

    n_steps: Optional[int] = Field(None, ge=1)
    scheme: Optional[Literal["euler", "rk4"]] = None
    mc_paths: Optional[int] = Field(None, ge=2)
    seed: Optional[int] = Field(None, ge=0)
    gamma: Optional[float] = Field(None, gt=0)
    m: Optional[float] = None
    x: Optional[float] = None
    m_grid: Optional[List[float]] = None
    gauss_points: Optional[int] = Field(None, ge=1)
    ode_steps: Optional[int] = Field(None, ge=1)
    n_list: Optional[List[int]] = None


class RunConfig(BaseModel):
    """Schema for a batch run document"""
    model_config = ConfigDict(extra="forbid")

    problem: Optional[Literal["solve", "simulate", "frontier", "oracle-compare", "unconstrained"]] = None
    model: Union[str, ModelSpec] = Field(..., description="Inline model or path to a model JSON file")
    cone: ConeSpec = Field(default_factory=lambda: ConeSpec(type="full"))
    options: OptionsSpec = Field(default_factory=OptionsSpec)
    out: Optional[str] = Field(None, description="Output directory")
