//! Tarjan strongly connected components over the explicit graph's node ids.
//! Components come out in reverse topological order of the condensation
//! (every component precedes its ancestors), which is exactly the order
//! value updates want: descendants first.

/// Tarjan SCC on an adjacency list. Node ids are positions in `adj`.
pub fn scc_decompose(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut state = Tarjan {
        next_index: 0,
        stack: Vec::new(),
        on_stack: vec![false; n],
        index: vec![None; n],
        low: vec![0; n],
        comps: Vec::new(),
    };
    for v in 0..n {
        if state.index[v].is_none() {
            strongconnect(v, adj, &mut state);
        }
    }
    state.comps
}

struct Tarjan {
    next_index: usize,
    stack: Vec<usize>,
    on_stack: Vec<bool>,
    index: Vec<Option<usize>>,
    low: Vec<usize>,
    comps: Vec<Vec<usize>>,
}

fn strongconnect(v: usize, adj: &[Vec<usize>], st: &mut Tarjan) {
    st.index[v] = Some(st.next_index);
    st.low[v] = st.next_index;
    st.next_index += 1;
    st.stack.push(v);
    st.on_stack[v] = true;

    for &w in &adj[v] {
        if st.index[w].is_none() {
            strongconnect(w, adj, st);
            st.low[v] = st.low[v].min(st.low[w]);
        } else if st.on_stack[w] {
            st.low[v] = st.low[v].min(st.index[w].unwrap());
        }
    }

    if st.low[v] == st.index[v].unwrap() {
        let mut comp = Vec::new();
        loop {
            let w = st.stack.pop().expect("tarjan stack underflow");
            st.on_stack[w] = false;
            comp.push(w);
            if w == v {
                break;
            }
        }
        comp.sort_unstable();
        st.comps.push(comp);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dag_gives_singletons() {
        // 0 -> 1 -> 2 -> 3 -> 4
        let adj = vec![vec![1], vec![2], vec![3], vec![4], vec![]];
        let comps = scc_decompose(&adj);
        assert_eq!(comps.len(), 5);
        assert!(comps.iter().all(|c| c.len() == 1));
        // Reverse topological: leaf first, root last.
        assert_eq!(comps.first().unwrap(), &vec![4]);
        assert_eq!(comps.last().unwrap(), &vec![0]);
    }

    #[test]
    fn two_cycle_with_tail() {
        // 0 <-> 1, 1 -> 2
        let adj = vec![vec![1], vec![0, 2], vec![]];
        let comps = scc_decompose(&adj);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0], vec![2]);
        assert_eq!(comps[1], vec![0, 1]);
    }

    #[test]
    fn random_graphs_match_reachability_oracle() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..25 {
            let n = 50;
            let mut adj = vec![Vec::new(); n];
            for v in 0..n {
                for w in 0..n {
                    if v != w && rng.random_bool(0.05) {
                        adj[v].push(w);
                    }
                }
            }
            let comps = scc_decompose(&adj);
            // Membership oracle: transitive closure by Floyd-Warshall.
            let mut reach = vec![vec![false; n]; n];
            for v in 0..n {
                reach[v][v] = true;
                for &w in &adj[v] {
                    reach[v][w] = true;
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        reach[i][j] |= reach[i][k] && reach[k][j];
                    }
                }
            }
            let mut comp_of = vec![usize::MAX; n];
            for (ci, comp) in comps.iter().enumerate() {
                for &v in comp {
                    comp_of[v] = ci;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let same = reach[i][j] && reach[j][i];
                    assert_eq!(same, comp_of[i] == comp_of[j], "nodes {} {}", i, j);
                }
            }
            // Condensation must be acyclic and ordered descendants-first.
            for (ci, comp) in comps.iter().enumerate() {
                for &v in comp {
                    for &w in &adj[v] {
                        if comp_of[w] != ci {
                            assert!(
                                comp_of[w] < ci,
                                "edge {}->{} goes to a later component",
                                v,
                                w
                            );
                        }
                    }
                }
            }
        }
    }
}
