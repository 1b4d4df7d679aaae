//! State/action spaces, channel and arrival processes, and the per-user
//! transition kernel.
//!
//! Channel gains are `{0, 1/K, ..., 1}`, power values are `{0, 1, ..., L}` and
//! queue lengths are `{0, ..., Q}`. A state is `(h, q)` and an action is
//! `(c, p)` with `c` the admission bit. Enumeration is row-major: `h` outer and
//! `q` inner for states, `c` outer and `p` inner for actions. The LP variable
//! for `(x, a)` sits at `x * |A| + a`.

use crate::error::{invalid, Result};

/// Row-sum tolerance for stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct UserSpec {
    pub channel_levels: usize,
    pub power_levels: usize,
    pub buffer_size: usize,
    pub power_cap: f64,
    pub queue_cap: f64,
    pub arrival_rate: f64,
    pub channel_chain: Vec<Vec<f64>>,
}

impl UserSpec {
    /// Builds a spec using the default fading chain for `channel_levels`.
    pub fn new(
        channel_levels: usize,
        power_levels: usize,
        buffer_size: usize,
        power_cap: f64,
        queue_cap: f64,
        arrival_rate: f64,
    ) -> Result<Self> {
        let channel_chain = default_channel_chain(channel_levels)?;
        Self::with_channel_chain(
            channel_levels,
            power_levels,
            buffer_size,
            power_cap,
            queue_cap,
            arrival_rate,
            channel_chain,
        )
    }

    pub fn with_channel_chain(
        channel_levels: usize,
        power_levels: usize,
        buffer_size: usize,
        power_cap: f64,
        queue_cap: f64,
        arrival_rate: f64,
        channel_chain: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let spec = UserSpec {
            channel_levels,
            power_levels,
            buffer_size,
            power_cap,
            queue_cap,
            arrival_rate,
            channel_chain,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_levels == 0 {
            return Err(invalid("K", "must be at least 1"));
        }
        if self.power_levels == 0 {
            return Err(invalid("L", "must be at least 1"));
        }
        if self.buffer_size == 0 {
            return Err(invalid("Q", "must be at least 1"));
        }
        for (name, v) in [
            ("power_cap", self.power_cap),
            ("queue_cap", self.queue_cap),
            ("lambda", self.arrival_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(
                    name,
                    format!("must be a positive finite number, got {v}"),
                ));
            }
        }
        validate_stochastic(&self.channel_chain, self.channel_levels + 1)
            .map_err(|reason| invalid("channel_chain", reason))
    }

    pub fn space(&self) -> StateActionSpace {
        StateActionSpace::new(self.channel_levels, self.power_levels, self.buffer_size)
    }
}

fn validate_stochastic(m: &[Vec<f64>], size: usize) -> std::result::Result<(), String> {
    if m.len() != size {
        return Err(format!("expected {size} rows, got {}", m.len()));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != size {
            return Err(format!(
                "row {i} has {} entries, expected {size}",
                row.len()
            ));
        }
        if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(format!("row {i} has a negative or non-finite entry"));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(format!("row {i} sums to {s}, not 1"));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub users: Vec<UserSpec>,
    pub noise_variance: f64,
    pub symmetric: bool,
}

impl Scenario {
    pub fn new(users: Vec<UserSpec>, noise_variance: f64) -> Result<Self> {
        if users.is_empty() {
            return Err(invalid("users", "at least one user is required"));
        }
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(invalid("noise_variance", "must be positive"));
        }
        for u in &users {
            u.validate()?;
        }
        let symmetric = users.windows(2).all(|w| w[0] == w[1]);
        Ok(Scenario {
            users,
            noise_variance,
            symmetric,
        })
    }

    /// `n` copies of the same user.
    pub fn symmetric(spec: UserSpec, n: usize, noise_variance: f64) -> Result<Self> {
        Self::new(vec![spec; n], noise_variance)
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct State {
    pub channel: usize,
    pub queue: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Action {
    pub admit: bool,
    pub power: usize,
}

impl Action {
    pub fn transmits(&self) -> bool {
        self.power > 0
    }
}

/// Index maps for states, actions and `(state, action)` LP variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateActionSpace {
    pub channel_levels: usize,
    pub power_levels: usize,
    pub buffer_size: usize,
}

impl StateActionSpace {
    pub fn new(channel_levels: usize, power_levels: usize, buffer_size: usize) -> Self {
        StateActionSpace {
            channel_levels,
            power_levels,
            buffer_size,
        }
    }

    pub fn num_states(&self) -> usize {
        (self.channel_levels + 1) * (self.buffer_size + 1)
    }

    pub fn num_actions(&self) -> usize {
        2 * (self.power_levels + 1)
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states() * self.num_actions()
    }

    pub fn state_index(&self, s: State) -> usize {
        s.channel * (self.buffer_size + 1) + s.queue
    }

    pub fn state(&self, idx: usize) -> State {
        State {
            channel: idx / (self.buffer_size + 1),
            queue: idx % (self.buffer_size + 1),
        }
    }

    pub fn action_index(&self, a: Action) -> usize {
        usize::from(a.admit) * (self.power_levels + 1) + a.power
    }

    pub fn action(&self, idx: usize) -> Action {
        Action {
            admit: idx / (self.power_levels + 1) == 1,
            power: idx % (self.power_levels + 1),
        }
    }

    pub fn pair_index(&self, state: usize, action: usize) -> usize {
        state * self.num_actions() + action
    }

    pub fn pair(&self, idx: usize) -> (State, Action) {
        let na = self.num_actions();
        (self.state(idx / na), self.action(idx % na))
    }

    pub fn channel_gain(&self, channel: usize) -> f64 {
        channel as f64 / self.channel_levels as f64
    }

    pub fn power_value(&self, power: usize) -> f64 {
        power as f64
    }

    /// Effective SNR `h * p * 1{q > 0}` of a state-action pair.
    pub fn effective_snr(&self, s: State, a: Action) -> f64 {
        if s.queue == 0 {
            0.0
        } else {
            self.channel_gain(s.channel) * self.power_value(a.power)
        }
    }

    pub fn iter_pairs(&self) -> impl Iterator<Item = (usize, State, Action)> + '_ {
        (0..self.num_pairs()).map(move |i| {
            let (s, a) = self.pair(i);
            (i, s, a)
        })
    }
}

/// How the interior rows of the fading chain are read. Each interior state
/// lists weight 1/2 on itself and on both neighbours, which sums to 3/2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChannelReading {
    /// Divide the listed weights by their sum: 1/3 each.
    #[default]
    RowNormalized,
    /// Keep the 1/2 self-loop and split the other half: (1/4, 1/2, 1/4).
    HalfSelfLoop,
}

/// The (K+1)-state fading chain. Boundary states stay or move to their single
/// neighbour with probability 1/2 each.
pub fn build_channel_chain(
    channel_levels: usize,
    reading: ChannelReading,
) -> Result<Vec<Vec<f64>>> {
    if channel_levels == 0 {
        return Err(invalid("K", "must be at least 1"));
    }
    let n = channel_levels + 1;
    let mut chain = vec![vec![0.0; n]; n];
    chain[0][0] = 0.5;
    chain[0][1] = 0.5;
    chain[channel_levels][channel_levels] = 0.5;
    chain[channel_levels][channel_levels - 1] = 0.5;
    let (side, stay) = match reading {
        ChannelReading::RowNormalized => (1.0 / 3.0, 1.0 / 3.0),
        ChannelReading::HalfSelfLoop => (0.25, 0.5),
    };
    for (k, row) in chain.iter_mut().enumerate().take(channel_levels).skip(1) {
        row[k - 1] = side;
        row[k] = stay;
        row[k + 1] = side;
    }
    Ok(chain)
}

/// [`build_channel_chain`] with the default reading.
pub fn default_channel_chain(channel_levels: usize) -> Result<Vec<Vec<f64>>> {
    build_channel_chain(channel_levels, ChannelReading::default())
}

/// Poisson(`rate`) arrivals truncated to `{0, ..., max_accept}`; everything at
/// or above `max_accept` lands on `max_accept`.
pub fn truncated_arrival_pmf(rate: f64, max_accept: usize) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(max_accept + 1);
    let mut term = (-rate).exp();
    let mut head = 0.0;
    for j in 0..max_accept {
        pmf.push(term);
        head += term;
        term *= rate / (j + 1) as f64;
    }
    pmf.push((1.0 - head).max(0.0));
    pmf
}

/// Queue length after serving one packet (when transmitting from a
/// non-empty queue) and before admitting arrivals.
pub fn queue_after_service(queue: usize, action: Action) -> usize {
    if action.transmits() && queue > 0 {
        queue - 1
    } else {
        queue
    }
}

/// Distribution of the next queue length given the current one and the action.
pub fn queue_transition(spec: &UserSpec, queue: usize, action: Action) -> Vec<f64> {
    let cap = spec.buffer_size;
    let mut out = vec![0.0; cap + 1];
    let mid = queue_after_service(queue, action);
    if action.admit {
        for (w, p) in truncated_arrival_pmf(spec.arrival_rate, cap - mid)
            .into_iter()
            .enumerate()
        {
            out[mid + w] += p;
        }
    } else {
        out[mid] = 1.0;
    }
    out
}

/// Dense `P(y | x, a)` tensor.
#[derive(Clone, Debug)]
pub struct TransitionKernel {
    space: StateActionSpace,
    probs: Vec<f64>,
}

impl TransitionKernel {
    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.row(state, action)[next]
    }

    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let ns = self.space.num_states();
        let start = (state * self.space.num_actions() + action) * ns;
        &self.probs[start..start + ns]
    }
}

pub fn build_transition_kernel(spec: &UserSpec) -> TransitionKernel {
    let space = spec.space();
    let ns = space.num_states();
    let na = space.num_actions();
    let mut probs = vec![0.0; ns * na * ns];
    for x in 0..ns {
        let s = space.state(x);
        for a in 0..na {
            let action = space.action(a);
            let queue_next = queue_transition(spec, s.queue, action);
            let base = (x * na + a) * ns;
            for (h_next, &ph) in spec.channel_chain[s.channel].iter().enumerate() {
                for (q_next, &pq) in queue_next.iter().enumerate() {
                    let y = space.state_index(State {
                        channel: h_next,
                        queue: q_next,
                    });
                    probs[base + y] = ph * pq;
                }
            }
        }
    }
    TransitionKernel { space, probs }
}
