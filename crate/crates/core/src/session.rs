//! End-to-end materialization: canonicalize, type, plan and execute.

use std::sync::Arc;

use crate::dataset::Dataset;
use crate::error::Error;
use crate::expr::{canonicalize, CanonicalDag, ExprHandle, Graph};
use crate::jagged::JaggedArray;
use crate::local::{FunctionTable, LocalExecutor};
use crate::planner::{self, all_local_backends, split_backends, Execution, Executor, Plan, PlanError};
use crate::remote::{QueryService, RemoteExecutor, TranslateOptions};
use crate::schema::{infer, ShapeMap};

/// How work is distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// The remote service reads the data; a local interpreter that cannot
    /// read it finishes whatever the service cannot express.
    Split { cross_reference: bool },
    /// A single local interpreter reads the data directly.
    AllLocal,
}

/// A typed and planned program, ready to run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dag: CanonicalDag,
    pub shapes: ShapeMap,
    pub plan: Plan,
}

/// Materializes expressions over one dataset.
#[derive(Debug, Clone)]
pub struct Session {
    dataset: Dataset,
    service: Arc<QueryService>,
    local: LocalExecutor,
    mode: Mode,
    strict: bool,
}

impl Session {
    /// A session with the built-in functions and an uncached service.
    pub fn new(dataset: Dataset, mode: Mode) -> Self {
        let service = Arc::new(QueryService::new(FunctionTable::builtins()));
        Session::with_service(dataset, service, mode)
    }

    /// A session over an existing service; the dataset is registered with it.
    pub fn with_service(dataset: Dataset, service: Arc<QueryService>, mode: Mode) -> Self {
        service.add_dataset(dataset.clone());
        Session { dataset, service, local: LocalExecutor::new(FunctionTable::builtins()), mode, strict: false }
    }

    /// Makes unknown leaves a type error instead of a warning.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn service(&self) -> &Arc<QueryService> {
        &self.service
    }

    pub fn local(&self) -> &LocalExecutor {
        &self.local
    }

    /// A graph with the session's functions declared.
    pub fn graph(&self) -> Graph {
        let g = Graph::new();
        self.local.functions().declare_all(&g).expect("built-in signatures are consistent");
        g
    }

    pub fn prepare(&self, roots: &[&ExprHandle]) -> Result<Prepared, Error> {
        let dag = canonicalize(roots)?;
        if let Some(other) = dag.datasets().into_iter().find(|d| *d != self.dataset.id) {
            return Err(PlanError::WrongDataset { expected: self.dataset.id.clone(), found: other.to_string() }.into());
        }
        let shapes = infer(&dag, &self.dataset.schema, self.strict)?;
        self.prepare_dag(dag, shapes)
    }

    /// Plans an already typed program.
    pub fn prepare_dag(&self, dag: CanonicalDag, shapes: ShapeMap) -> Result<Prepared, Error> {
        let backends = match self.mode {
            Mode::Split { cross_reference } => {
                let mut caps = split_backends(&self.local.functions().names(), cross_reference);
                caps[0].functions = self.service.functions().names();
                caps
            }
            Mode::AllLocal => all_local_backends(&self.local.functions().names()),
        };
        let plan = planner::plan(&dag, &backends)?;
        Ok(Prepared { dag, shapes, plan })
    }

    pub fn execute(&self, prepared: &Prepared) -> Result<Execution, Error> {
        let executors: Vec<Executor> = match self.mode {
            Mode::Split { cross_reference } => vec![
                Executor::Remote(RemoteExecutor::new(
                    self.service.clone(),
                    &self.dataset.id,
                    TranslateOptions { cross_reference },
                )),
                Executor::Local { executor: self.local.clone(), data: None },
            ],
            Mode::AllLocal => {
                vec![Executor::Local { executor: self.local.clone(), data: Some(self.dataset.data.clone()) }]
            }
        };
        Ok(planner::execute(&prepared.plan, &prepared.dag, Some(&prepared.shapes), &executors)?)
    }

    /// Evaluates `roots`, one array per root.
    pub fn materialize(&self, roots: &[&ExprHandle]) -> Result<Vec<JaggedArray>, Error> {
        let prepared = self.prepare(roots)?;
        Ok(self.execute(&prepared)?.roots)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_events;
    use crate::schema::DatasetSchema;

    const EVENTS: &str = r#"{"Electrons":[{"pt":50000.0,"eta":0.5,"phi":0.0},{"pt":20000.0,"eta":2.0,"phi":3.0},{"pt":45000.0,"eta":2.6,"phi":1.0}]}
{"Electrons":[{"pt":60000.0,"eta":-1.0,"phi":-3.0}]}
{}
"#;

    fn dataset() -> Dataset {
        let schema = DatasetSchema::default_model();
        Dataset::from_events("mc.zee", schema.clone(), parse_events(EVENTS, &schema).unwrap()).unwrap()
    }

    fn electron_pt(g: &Graph) -> ExprHandle {
        let eles = g.source("mc.zee").attr("Electrons");
        eles.filter(eles.attr("eta").abs().lt(2.4) & eles.attr("pt").gt(30000.0)).attr("pt") / 1000.0
    }

    #[test]
    fn all_modes_agree() {
        let want = JaggedArray::from_rows(&[vec![50.0], vec![60.0], vec![]]);
        for mode in [Mode::AllLocal, Mode::Split { cross_reference: false }, Mode::Split { cross_reference: true }] {
            let s = Session::new(dataset(), mode);
            let g = s.graph();
            let out = s.materialize(&[&electron_pt(&g)]).unwrap();
            assert_eq!(out[0], want, "{mode:?}");
        }
    }

    #[test]
    fn split_ships_boundaries() {
        let s = Session::new(dataset(), Mode::Split { cross_reference: false });
        let g = s.graph();
        let p = s.prepare(&[&electron_pt(&g)]).unwrap();
        let ex = s.execute(&p).unwrap();
        assert_eq!(ex.n_events, 3);
        assert_eq!(ex.boundary_sizes.len(), 2);
        assert_eq!(s.service().evaluations(), 2);
    }

    #[test]
    fn wrong_dataset_is_a_plan_error() {
        let s = Session::new(dataset(), Mode::AllLocal);
        let g = s.graph();
        let e = s.materialize(&[&g.source("other").attr("Electrons").count()]).unwrap_err();
        assert_eq!(e.category(), crate::ErrorCategory::Plan);
    }
}
