use ndarray::Array2;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// True only for task terminations, not iteration-limit cutoffs.
    pub done: bool,
}

/// Minibatch laid out row-per-transition.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn from_transitions(obs_dim: usize, ts: &[Transition]) -> Self {
        let n = ts.len();
        Batch {
            obs: Array2::from_shape_fn((n, obs_dim), |(i, j)| ts[i].obs[j]),
            actions: ts.iter().map(|t| t.action).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_obs: Array2::from_shape_fn((n, obs_dim), |(i, j)| ts[i].next_obs[j]),
            dones: ts.iter().map(|t| t.done).collect(),
        }
    }
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    head: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            obs_dim,
            obs: vec![0.0; capacity * obs_dim],
            next_obs: vec![0.0; capacity * obs_dim],
            actions: vec![0; capacity],
            rewards: vec![0.0; capacity],
            dones: vec![false; capacity],
            head: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, obs: &[f64], action: usize, reward: f64, next_obs: &[f64], done: bool) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        let i = self.head;
        let d = self.obs_dim;
        self.obs[i * d..(i + 1) * d].copy_from_slice(obs);
        self.next_obs[i * d..(i + 1) * d].copy_from_slice(next_obs);
        self.actions[i] = action;
        self.rewards[i] = reward;
        self.dones[i] = done;
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    fn slot(&self, age_order: usize) -> usize {
        // Oldest entry sits at head once the ring has wrapped.
        if self.len < self.capacity {
            age_order
        } else {
            (self.head + age_order) % self.capacity
        }
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len).map(move |k| self.get(self.slot(k)))
    }

    fn get(&self, i: usize) -> Transition {
        let d = self.obs_dim;
        Transition {
            obs: self.obs[i * d..(i + 1) * d].to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_obs: self.next_obs[i * d..(i + 1) * d].to_vec(),
            done: self.dones[i],
        }
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Batch {
        assert!(self.len > 0, "sampling from an empty buffer");
        let d = self.obs_dim;
        let mut obs = Array2::zeros((batch_size, d));
        let mut next_obs = Array2::zeros((batch_size, d));
        let mut actions = Vec::with_capacity(batch_size);
        let mut rewards = Vec::with_capacity(batch_size);
        let mut dones = Vec::with_capacity(batch_size);
        for r in 0..batch_size {
            let i = rng.random_range(0..self.len);
            for j in 0..d {
                obs[[r, j]] = self.obs[i * d + j];
                next_obs[[r, j]] = self.next_obs[i * d + j];
            }
            actions.push(self.actions[i]);
            rewards.push(self.rewards[i]);
            dones.push(self.dones[i]);
        }
        Batch { obs, actions, rewards, next_obs, dones }
    }
}
