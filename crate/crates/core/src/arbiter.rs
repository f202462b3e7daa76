//! Syscall arbiter: intercepts every application call, routes it by
//! sensitivity, and guards the in-process restart path with one-time tokens.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::syscall_model::{
    classify, FdView, Issuer, SensitivityClass, SensitivityPolicy, SyscallEvent, VariantId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenState {
    Issued,
    Consumed,
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct AuthToken {
    value: u64,
    variant: VariantId,
    bound_seq: u64,
}

/// An authentication token as handed to the in-process monitor. The nonce
/// is not readable through any public API; tests and fault injection can
/// only derive altered copies.
#[derive(Clone, PartialEq, Eq)]
pub struct SealedToken(AuthToken);

impl fmt::Debug for SealedToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SealedToken")
            .field("variant", &self.0.variant)
            .field("bound_seq", &self.0.bound_seq)
            .finish_non_exhaustive()
    }
}

impl SealedToken {
    pub fn variant(&self) -> VariantId {
        self.0.variant
    }

    pub fn bound_seq(&self) -> u64 {
        self.0.bound_seq
    }

    /// Copy with the nonce xor-ed by `mask`.
    pub fn tampered(&self, mask: u64) -> SealedToken {
        SealedToken(AuthToken {
            value: self.0.value ^ mask,
            ..self.0
        })
    }

    /// Copy claiming a different (variant, seq) binding.
    pub fn rebound(&self, variant: VariantId, seq: u64) -> SealedToken {
        SealedToken(AuthToken {
            variant,
            bound_seq: seq,
            ..self.0
        })
    }

    /// A token guessed from scratch.
    pub fn forged(value: u64, variant: VariantId, seq: u64) -> SealedToken {
        SealedToken(AuthToken {
            value,
            variant,
            bound_seq: seq,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    ToDipMon(SealedToken),
    ToDcpMon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartVerdict {
    PermitDipMon,
    ForwardDcpMon,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecurityEvent {
    pub variant: VariantId,
    pub seq: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArbiterStats {
    pub intercepted: u64,
    pub to_dipmon: u64,
    pub to_dcpmon: u64,
    pub tokens_minted: u64,
    pub permits: u64,
    pub rejections: u64,
    /// Kernel crossings: one per intercept and one per restart.
    pub crossings: u64,
    /// Calls presented to `intercept` that were not issued by the application.
    pub monitor_origin_intercepts: u64,
    pub classify_calls: u64,
}

/// One arbiter per variant; its token table is private to it.
#[derive(Debug)]
pub struct Arbiter {
    variant: VariantId,
    policy: Arc<SensitivityPolicy>,
    rng: ChaCha8Rng,
    tokens: HashMap<u64, (u64, TokenState)>,
    stats: ArbiterStats,
    security_log: Vec<SecurityEvent>,
}

impl Arbiter {
    pub fn new(variant: VariantId, policy: Arc<SensitivityPolicy>, seed: u64) -> Self {
        let stream = seed ^ (u64::from(variant) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Arbiter {
            variant,
            policy,
            rng: ChaCha8Rng::seed_from_u64(stream),
            tokens: HashMap::new(),
            stats: ArbiterStats::default(),
            security_log: Vec::new(),
        }
    }

    pub fn stats(&self) -> ArbiterStats {
        self.stats
    }

    pub fn security_log(&self) -> &[SecurityEvent] {
        &self.security_log
    }

    pub fn token_state(&self, seq: u64) -> Option<TokenState> {
        self.tokens.get(&seq).map(|&(_, s)| s)
    }

    /// Route an application call. Non-sensitive calls get a fresh token.
    pub fn intercept(&mut self, event: &SyscallEvent, fmap: &dyn FdView) -> Route {
        self.stats.intercepted += 1;
        self.stats.crossings += 1;
        if event.issuer != Issuer::Application {
            self.stats.monitor_origin_intercepts += 1;
            self.stats.to_dcpmon += 1;
            return Route::ToDcpMon;
        }
        self.stats.classify_calls += 1;
        match classify(event, fmap, &self.policy) {
            SensitivityClass::Sensitive => {
                self.stats.to_dcpmon += 1;
                Route::ToDcpMon
            }
            SensitivityClass::NonSensitive => {
                let value = self.rng.next_u64() | 1;
                self.tokens.insert(event.seq, (value, TokenState::Issued));
                self.stats.tokens_minted += 1;
                self.stats.to_dipmon += 1;
                Route::ToDipMon(SealedToken(AuthToken {
                    value,
                    variant: self.variant,
                    bound_seq: event.seq,
                }))
            }
        }
    }

    /// Check a restarted call. Anything other than an intact, unused token
    /// for this exact call, presented by the in-process monitor, is
    /// forwarded to the cross-process monitor and logged.
    pub fn verify_restart(&mut self, event: &SyscallEvent, presented: &SealedToken) -> RestartVerdict {
        self.stats.crossings += 1;
        let token = presented.0;
        let rejection = if event.issuer != Issuer::InProcessMonitor {
            Some("restart not issued by the in-process monitor".to_string())
        } else if token.variant != self.variant {
            Some(format!("token minted for variant {}", token.variant))
        } else if token.bound_seq != event.seq {
            Some(format!("token bound to seq {}", token.bound_seq))
        } else {
            match self.tokens.get_mut(&event.seq) {
                None => Some("no token issued for this call".to_string()),
                Some((_, TokenState::Consumed)) => Some("token replayed".to_string()),
                Some((value, _)) if *value != token.value => Some("token value mismatch".to_string()),
                Some((_, state)) => {
                    *state = TokenState::Consumed;
                    None
                }
            }
        };
        match rejection {
            None => {
                self.stats.permits += 1;
                RestartVerdict::PermitDipMon
            }
            Some(reason) => {
                self.stats.rejections += 1;
                self.security_log.push(SecurityEvent {
                    variant: self.variant,
                    seq: event.seq,
                    reason,
                });
                RestartVerdict::ForwardDcpMon
            }
        }
    }
}
