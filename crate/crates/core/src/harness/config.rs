//! Run configuration, attack specifications, and kernel fault injection.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use crate::cost::CostModel;
use crate::dcpmon::DEFAULT_BARRIER_TIMEOUT;
use crate::dipmon::{DipMonConfig, MispredictionPolicy, MonitoringMode};
use crate::error::MvxError;
use crate::syscall_model::{RawCall, SensitivityPolicy, SyscallKind, VariantId};
use crate::transport::{ChannelFlavor, DEFAULT_CAPACITY};
use crate::variant_engine::WorkloadScript;

pub const DEFAULT_LATENCY_US: u64 = 50;

/// `sim:<latency_us>` or `tcp:<port>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelSpec {
    pub flavor: ChannelFlavor,
    pub latency_us: u64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            flavor: ChannelFlavor::Simulated,
            latency_us: DEFAULT_LATENCY_US,
        }
    }
}

impl FromStr for ChannelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| format!("channel must be sim:<us> or tcp:<port>, got `{s}`"))?;
        let n = |what: &str| arg.parse::<u64>().map_err(|_| format!("bad {what} `{arg}`"));
        match kind {
            "sim" => Ok(ChannelSpec {
                flavor: ChannelFlavor::Simulated,
                latency_us: n("latency")?,
            }),
            "tcp" => {
                let port = u16::try_from(n("port")?).map_err(|_| format!("port out of range `{arg}`"))?;
                Ok(ChannelSpec {
                    flavor: ChannelFlavor::Loopback { port },
                    latency_us: DEFAULT_LATENCY_US,
                })
            }
            other => Err(format!("unknown channel flavor `{other}`")),
        }
    }
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.flavor {
            ChannelFlavor::Simulated => write!(f, "sim:{}", self.latency_us),
            ChannelFlavor::Loopback { port } => write!(f, "tcp:{port}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    ExtraSensitiveCall(RawCall),
    ArgPerturb { field: String, delta: i64 },
    SkipCall,
    TokenFlip { bit: u8 },
    TokenReplay,
}

/// `<variant>@<seq>:<mutation>`, mutation one of `extra:<kind>[,k=v...]`,
/// `perturb:<field>:<delta>`, `skip`, `token-flip:<bit>`, `token-replay`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSpec {
    pub variant: VariantId,
    pub seq: u64,
    pub mutation: Mutation,
}

/// Arguments used for an injected call when the attack leaves them out.
fn template(kind: SyscallKind) -> RawCall {
    use SyscallKind::*;
    let r = RawCall::new(kind);
    match kind {
        Open | Stat => r.arg("path", "/tmp/payload").arg("flags", "read"),
        Close | Accept => r.arg("fd", 3),
        Read | Recv => r.arg("fd", 3).arg("len", 64),
        Write | Send => r.arg("fd", 3).arg("data", "payload"),
        Brk => r.arg("incr", 4096),
        Mmap | Mprotect => r.arg("len", 4096).arg("prot", "read|write|exec"),
        Setsockopt => r.arg("fd", 3).arg("level", "socket").arg("opt", "reuseaddr").arg("value", 1),
        Bind | Connect => r.arg("fd", 3).arg("port", 4444),
        Listen => r.arg("fd", 3).arg("backlog", 1),
        Lseek => r.arg("fd", 3).arg("off", 0).arg("whence", "set"),
        Exit => r.arg("code", 0),
        Getcwd | Socket => r,
    }
}

impl FromStr for AttackSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("attack must look like <variant>@<seq>:<mutation>, got `{s}`");
        let (target, mutation) = s.split_once(':').ok_or_else(bad)?;
        let (v, seq) = target.split_once('@').ok_or_else(bad)?;
        let variant = v.parse().map_err(|_| bad())?;
        let seq = seq.parse().map_err(|_| bad())?;
        let mut parts = mutation.splitn(2, ':');
        let mutation = match (parts.next(), parts.next()) {
            (Some("skip"), None) => Mutation::SkipCall,
            (Some("token-replay"), None) => Mutation::TokenReplay,
            (Some("token-flip"), Some(bit)) => {
                let bit: u8 = bit.parse().map_err(|_| format!("bad bit `{bit}`"))?;
                if bit > 63 {
                    return Err(format!("token bit {bit} out of range"));
                }
                Mutation::TokenFlip { bit }
            }
            (Some("perturb"), Some(rest)) => {
                let (field, delta) = rest.split_once(':').ok_or_else(|| format!("perturb needs <field>:<delta>, got `{rest}`"))?;
                Mutation::ArgPerturb {
                    field: field.to_string(),
                    delta: delta.parse().map_err(|_| format!("bad delta `{delta}`"))?,
                }
            }
            (Some("extra"), Some(rest)) => {
                let mut items = rest.split(',');
                let kind: SyscallKind = items.next().unwrap_or("").parse().map_err(|e: crate::error::ScenarioError| e.message)?;
                let mut raw = template(kind);
                for kv in items {
                    let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got `{kv}`"))?;
                    raw.args.insert(k.to_string(), v.to_string());
                }
                crate::syscall_model::normalize(&raw, &Default::default()).map_err(|e| e.message)?;
                Mutation::ExtraSensitiveCall(raw)
            }
            _ => return Err(format!("unknown mutation `{mutation}`")),
        };
        Ok(AttackSpec { variant, seq, mutation })
    }
}

/// `<variant>:<kind>:<count>`: the next `count` calls of `kind` in that
/// variant's kernel fail transiently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelFault {
    pub variant: VariantId,
    pub kind: SyscallKind,
    pub count: u32,
}

impl FromStr for KernelFault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("fault must look like <variant>:<kind>:<count>, got `{s}`");
        let mut it = s.split(':');
        let (Some(v), Some(k), Some(c), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad());
        };
        Ok(KernelFault {
            variant: v.parse().map_err(|_| bad())?,
            kind: k.parse().map_err(|_| bad())?,
            count: c.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub workload: Arc<WorkloadScript>,
    pub variants: u16,
    pub ssm: bool,
    pub rsm: bool,
    pub sr: bool,
    pub channel: ChannelSpec,
    pub seed: u64,
    pub policy: Arc<SensitivityPolicy>,
    pub app_root: String,
    pub misprediction: MispredictionPolicy,
    pub retry_budget: u32,
    pub attacks: Vec<AttackSpec>,
    pub faults: Vec<KernelFault>,
    pub cb_capacity: usize,
    pub costs: CostModel,
    pub barrier_timeout: Duration,
}

impl RunConfig {
    pub fn new(workload: WorkloadScript) -> Self {
        RunConfig {
            workload: Arc::new(workload),
            variants: 2,
            ssm: false,
            rsm: false,
            sr: false,
            channel: ChannelSpec::default(),
            seed: 0,
            policy: Arc::new(SensitivityPolicy::default()),
            app_root: "/app".into(),
            misprediction: MispredictionPolicy::Retry,
            retry_budget: 16,
            attacks: Vec::new(),
            faults: Vec::new(),
            cb_capacity: DEFAULT_CAPACITY,
            costs: CostModel::default(),
            barrier_timeout: DEFAULT_BARRIER_TIMEOUT,
        }
    }

    pub fn validate(&self) -> Result<(), MvxError> {
        let err = |m: String| Err(MvxError::Config(m));
        if self.variants < 2 {
            return err(format!("need at least 2 variants, got {}", self.variants));
        }
        if self.ssm && self.rsm {
            return err("--ssm and --rsm are mutually exclusive".into());
        }
        if self.sr && !(self.ssm || self.rsm) {
            return err("--sr needs the in-process monitor: add --ssm or --rsm".into());
        }
        if self.cb_capacity == 0 {
            return err("communication buffer capacity must be positive".into());
        }
        for a in &self.attacks {
            if a.variant >= self.variants {
                return err(format!("attack targets variant {} but only {} run", a.variant, self.variants));
            }
        }
        for f in &self.faults {
            if f.variant >= self.variants {
                return err(format!("fault targets variant {} but only {} run", f.variant, self.variants));
            }
        }
        Ok(())
    }

    /// Without selective monitoring every call goes through lockstep.
    pub fn effective_policy(&self) -> Arc<SensitivityPolicy> {
        if self.ssm || self.rsm {
            self.policy.clone()
        } else {
            Arc::new(SensitivityPolicy::all_sensitive())
        }
    }

    pub fn dipmon_config(&self) -> DipMonConfig {
        DipMonConfig {
            mode: if self.ssm {
                MonitoringMode::StrictSelective
            } else {
                MonitoringMode::RelaxedSelective
            },
            selective_replication: self.sr,
            app_root: self.app_root.clone(),
            misprediction: self.misprediction,
            retry_budget: self.retry_budget,
        }
    }

    /// Short label for the optimization set.
    pub fn mode_label(&self) -> &'static str {
        match (self.ssm, self.rsm, self.sr) {
            (false, false, _) => "no-opts",
            (true, _, false) => "ssm",
            (true, _, true) => "ssm+sr",
            (_, true, false) => "rsm",
            (_, true, true) => "rsm+sr",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack_specs_parse() {
        let a: AttackSpec = "0@5:extra:connect,port=31337".parse().unwrap();
        assert_eq!((a.variant, a.seq), (0, 5));
        let Mutation::ExtraSensitiveCall(raw) = a.mutation else { panic!() };
        assert_eq!(raw.args["port"], "31337");
        assert_eq!(raw.args["fd"], "3");
        assert_eq!("1@2:skip".parse::<AttackSpec>().unwrap().mutation, Mutation::SkipCall);
        assert_eq!(
            "1@2:perturb:len:-4".parse::<AttackSpec>().unwrap().mutation,
            Mutation::ArgPerturb { field: "len".into(), delta: -4 }
        );
        assert_eq!("0@1:token-flip:7".parse::<AttackSpec>().unwrap().mutation, Mutation::TokenFlip { bit: 7 });
        assert_eq!("0@1:token-replay".parse::<AttackSpec>().unwrap().mutation, Mutation::TokenReplay);
        for bad in ["0:skip", "x@1:skip", "0@1:explode", "0@1:token-flip:64", "0@1:extra:frob", "0@1:extra:connect,port"] {
            assert!(bad.parse::<AttackSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn channel_specs_parse() {
        assert_eq!("sim:50".parse::<ChannelSpec>().unwrap(), ChannelSpec::default());
        let t: ChannelSpec = "tcp:0".parse().unwrap();
        assert_eq!(t.flavor, ChannelFlavor::Loopback { port: 0 });
        assert_eq!(t.to_string(), "tcp:0");
        assert!("udp:1".parse::<ChannelSpec>().is_err());
        assert!("tcp:70000".parse::<ChannelSpec>().is_err());
    }

    #[test]
    fn toggles_are_validated() {
        let mut c = RunConfig::new(WorkloadScript::default());
        assert!(c.validate().is_ok());
        c.sr = true;
        assert!(c.validate().is_err());
        c.rsm = true;
        assert!(c.validate().is_ok());
        c.ssm = true;
        assert!(c.validate().is_err());
        c.ssm = false;
        c.variants = 1;
        assert!(c.validate().is_err());
        c.variants = 3;
        c.attacks.push("3@0:skip".parse().unwrap());
        assert!(c.validate().is_err());
    }

    #[test]
    fn fault_specs_parse() {
        let f: KernelFault = "1:setsockopt:2".parse().unwrap();
        assert_eq!((f.variant, f.kind, f.count), (1, SyscallKind::Setsockopt, 2));
        assert!("1:setsockopt".parse::<KernelFault>().is_err());
    }
}
