use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use normalforge::mesh::TriangleMesh;
use serde::Serialize;
use uuid::Uuid;

/// One editing session. Meshes are shared immutable snapshots, so readers
/// never block a running job for longer than an `Arc` clone.
#[derive(Debug)]
pub struct Session {
    pub id: Uuid,
    /// Mesh the session was created with.
    pub coarse: Arc<TriangleMesh>,
    /// Latest published snapshot.
    pub current: Arc<TriangleMesh>,
    /// Detailed mesh the oracle enhancer renders, if the session has one.
    pub reference: Option<Arc<TriangleMesh>>,
    pub history: VecDeque<Arc<TriangleMesh>>,
    /// Bumped on every publish; invalidates the view cache.
    pub generation: u64,
    pub active_job: Option<Uuid>,
    views: HashMap<String, Arc<Vec<u8>>>,
    history_cap: usize,
    view_cap: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub session_id: Uuid,
    pub vertex_count: usize,
    pub face_count: usize,
    pub generation: u64,
    pub history_len: usize,
    pub active_job: Option<Uuid>,
    pub has_reference: bool,
}

impl Session {
    pub fn new(mesh: TriangleMesh, reference: Option<TriangleMesh>, history_cap: usize, view_cap: usize) -> Self {
        let mesh = Arc::new(mesh);
        Self {
            id: Uuid::new_v4(),
            coarse: mesh.clone(),
            current: mesh.clone(),
            reference: reference.map(Arc::new),
            history: VecDeque::from([mesh]),
            generation: 0,
            active_job: None,
            views: HashMap::new(),
            history_cap: history_cap.max(1),
            view_cap,
        }
    }

    pub fn publish(&mut self, mesh: Arc<TriangleMesh>) {
        self.history.push_back(mesh.clone());
        while self.history.len() > self.history_cap {
            self.history.pop_front();
        }
        self.current = mesh;
        self.generation += 1;
        self.views.clear();
    }

    pub fn cached_view(&self, key: &str) -> Option<Arc<Vec<u8>>> {
        self.views.get(key).cloned()
    }

    /// Caches a render of generation `generation`; stale renders are dropped.
    pub fn cache_view(&mut self, generation: u64, key: String, png: Arc<Vec<u8>>) {
        if generation != self.generation || self.view_cap == 0 {
            return;
        }
        if self.views.len() >= self.view_cap {
            self.views.clear();
        }
        self.views.insert(key, png);
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id,
            vertex_count: self.current.vertices.len(),
            face_count: self.current.faces.len(),
            generation: self.generation,
            history_len: self.history.len(),
            active_job: self.active_job,
            has_reference: self.reference.is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use normalforge::mesh::shapes;

    #[test]
    fn history_is_a_bounded_ring() {
        let mut s = Session::new(shapes::tetrahedron(), None, 3, 4);
        for i in 0..5 {
            s.publish(Arc::new(shapes::icosphere(1.0, i % 2)));
        }
        assert_eq!(s.history.len(), 3);
        assert_eq!(s.generation, 5);
        assert!(Arc::ptr_eq(s.history.back().unwrap(), &s.current));
        assert_eq!(s.coarse.vertices.len(), 4);
    }

    #[test]
    fn publish_invalidates_views() {
        let mut s = Session::new(shapes::tetrahedron(), None, 10, 4);
        s.cache_view(0, "a".into(), Arc::new(vec![1]));
        assert!(s.cached_view("a").is_some());
        s.publish(Arc::new(shapes::tetrahedron()));
        assert!(s.cached_view("a").is_none());
        s.cache_view(0, "a".into(), Arc::new(vec![1]));
        assert!(s.cached_view("a").is_none());
    }
}
