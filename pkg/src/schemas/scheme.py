import enum
import re

from pydantic import BaseModel, ConfigDict, model_validator

TAG_PATTERN = re.compile(r"^(?P<clustering>[ds])-(?P<rs>RS|TIN)(?P<irs>\+IRS)?(?::(?P<cmd>dcmd|scmd))?$")


class Clustering(str, enum.Enum):
    dynamic = "dynamic"
    static = "static"


class RsMode(str, enum.Enum):
    rs = "rs"
    tin = "tin"


class SchemeSpec(BaseModel):
    """
    One transmission scheme: clustering, rate splitting, IRS and CMD-set mode.

    Tags follow ``<d|s>-<RS|TIN>[+IRS][:dcmd|:scmd]``; without a suffix the CMD
    sets are dynamic for ``d-RS+IRS`` and static for every other RS scheme.
    """
    model_config = ConfigDict(frozen=True)

    clustering: Clustering = Clustering.dynamic
    rs_mode: RsMode = RsMode.rs
    irs: bool = True
    cmd_mode: Clustering | None = None

    @model_validator(mode="before")
    @classmethod
    def default_cmd_mode(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        if RsMode(data.get("rs_mode", RsMode.rs)) is RsMode.tin:
            data["cmd_mode"] = None
        elif data.get("cmd_mode") is None:
            clustering = Clustering(data.get("clustering", Clustering.dynamic))
            dynamic = clustering is Clustering.dynamic and bool(data.get("irs", True))
            data["cmd_mode"] = Clustering.dynamic if dynamic else Clustering.static
        return data

    @classmethod
    def from_tag(cls, tag: str) -> "SchemeSpec":
        match = TAG_PATTERN.match(tag.strip())
        if match is None:
            raise ValueError(f"invalid scheme tag {tag!r}, expected <d|s>-<RS|TIN>[+IRS][:dcmd|:scmd]")
        if match["cmd"] and match["rs"] == "TIN":
            raise ValueError(f"scheme tag {tag!r} sets a CMD mode on a TIN scheme")
        cmd = {"dcmd": Clustering.dynamic, "scmd": Clustering.static}.get(match["cmd"])
        return cls(clustering=Clustering.dynamic if match["clustering"] == "d" else Clustering.static,
                   rs_mode=RsMode.rs if match["rs"] == "RS" else RsMode.tin,
                   irs=bool(match["irs"]), cmd_mode=cmd)

    @property
    def uses_rs(self) -> bool:
        return self.rs_mode is RsMode.rs

    @property
    def dynamic_cmd(self) -> bool:
        return self.cmd_mode is Clustering.dynamic

    @property
    def dynamic_clustering(self) -> bool:
        return self.clustering is Clustering.dynamic

    @property
    def base_tag(self) -> str:
        return f"{self.clustering.value[0]}-{self.rs_mode.value.upper()}{'+IRS' if self.irs else ''}"

    @property
    def tag(self) -> str:
        """Canonical tag; the CMD suffix is written only when it differs from the default."""
        if not self.uses_rs:
            return self.base_tag
        default = SchemeSpec(clustering=self.clustering, rs_mode=self.rs_mode, irs=self.irs)
        if self.cmd_mode is default.cmd_mode:
            return self.base_tag
        return f"{self.base_tag}:{'dcmd' if self.dynamic_cmd else 'scmd'}"

    def counterpart(self, **changes) -> "SchemeSpec":
        """The same scheme with some fields swapped, CMD mode re-derived."""
        fields = {"clustering": self.clustering, "rs_mode": self.rs_mode, "irs": self.irs} | changes
        return SchemeSpec(**fields)


ALL_SCHEMES = tuple(SchemeSpec.from_tag(f"{c}-{rs}{irs}") for c in "ds" for rs in ("RS", "TIN") for irs in ("+IRS", ""))
